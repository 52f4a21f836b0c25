#pragma once

#include "fedsn/adaptation.hpp"
#include "fedsn/evaluation.hpp"
#include "fedsn/experiment_config.hpp"
#include "fedsn/federation.hpp"
#include "fedsn/field.hpp"
#include "fedsn/harness.hpp"
#include "fedsn/metrics.hpp"
#include "fedsn/objectives.hpp"
#include "fedsn/ops.hpp"
#include "fedsn/optim.hpp"
#include "fedsn/parameters.hpp"
#include "fedsn/report.hpp"
#include "fedsn/rng.hpp"
#include "fedsn/supernet.hpp"
#include "fedsn/supernet_config.hpp"
#include "fedsn/synth_data.hpp"
#include "fedsn/tape.hpp"
