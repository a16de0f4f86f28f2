#pragma once

#include "equiseq/attention.hpp"
#include "equiseq/audit.hpp"
#include "equiseq/autodiff.hpp"
#include "equiseq/coefficient_map.hpp"
#include "equiseq/errors.hpp"
#include "equiseq/forms.hpp"
#include "equiseq/linalg.hpp"
#include "equiseq/matrix.hpp"
#include "equiseq/nonlinearity.hpp"
#include "equiseq/rng.hpp"
#include "equiseq/serialize.hpp"
#include "equiseq/train.hpp"
