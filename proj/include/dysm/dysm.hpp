#pragma once

#include "dysm/adaptive_proposal.hpp"
#include "dysm/config_io.hpp"
#include "dysm/data_io.hpp"
#include "dysm/diagnostics.hpp"
#include "dysm/dynamic_prior.hpp"
#include "dysm/errors.hpp"
#include "dysm/evaluation.hpp"
#include "dysm/forecast.hpp"
#include "dysm/mortality_model.hpp"
#include "dysm/panel.hpp"
#include "dysm/random.hpp"
#include "dysm/sampler.hpp"
#include "dysm/special_functions.hpp"
