#pragma once

#include "errors.hpp"
#include "model.hpp"
#include "product.hpp"
#include "ssp.hpp"
#include "milp.hpp"
#include "alloc.hpp"
#include "sim.hpp"
