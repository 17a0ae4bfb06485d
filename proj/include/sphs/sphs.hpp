#pragma once

#include "sphs/demo_systems.hpp"
#include "sphs/errors.hpp"
#include "sphs/generator.hpp"
#include "sphs/interconnect.hpp"
#include "sphs/matrix_kernel.hpp"
#include "sphs/observability.hpp"
#include "sphs/passivity.hpp"
#include "sphs/serialization.hpp"
#include "sphs/simulate.hpp"
#include "sphs/storage.hpp"
#include "sphs/system_model.hpp"
