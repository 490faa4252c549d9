#pragma once

// Matrix completion methods for causal panel data: the nuclear-norm
// estimator with cross-validated regularization, the standard comparison
// estimators (two-way fixed effects, horizontal/vertical regressions with
// and without elastic-net regularization, synthetic control), covariate and
// weighted-loss extensions, finite-sample bound evaluators, and a
// pseudo-treatment evaluation harness.

#include "panelmc/baselines.hpp"
#include "panelmc/covariates.hpp"
#include "panelmc/csv.hpp"
#include "panelmc/errors.hpp"
#include "panelmc/evaluation.hpp"
#include "panelmc/mask.hpp"
#include "panelmc/norms.hpp"
#include "panelmc/panel.hpp"
#include "panelmc/report.hpp"
#include "panelmc/rng.hpp"
#include "panelmc/soft_impute.hpp"
#include "panelmc/synthetic.hpp"
#include "panelmc/theory.hpp"
