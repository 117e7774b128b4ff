#pragma once

#include "oodlens/detect_metrics.hpp"
#include "oodlens/epistemic_laplace.hpp"
#include "oodlens/error.hpp"
#include "oodlens/experiment.hpp"
#include "oodlens/feature_scores.hpp"
#include "oodlens/generative_toy.hpp"
#include "oodlens/linalg.hpp"
#include "oodlens/logit_scores.hpp"
#include "oodlens/oracle_diagnostics.hpp"
#include "oodlens/parallel.hpp"
#include "oodlens/rng.hpp"
#include "oodlens/shallow_trainer.hpp"
#include "oodlens/synth.hpp"
#include "oodlens/tensor_io.hpp"
#include "oodlens/types.hpp"
