#pragma once

#include "spire/error.hpp"
#include "spire/estimators.hpp"
#include "spire/inference.hpp"
#include "spire/io.hpp"
#include "spire/model.hpp"
#include "spire/numerics.hpp"
#include "spire/simulation.hpp"
#include "spire/working_models.hpp"
