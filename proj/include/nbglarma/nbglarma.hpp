#pragma once

// Variable selection in sparse negative binomial GLARMA count time series.

#include "nbglarma/types.hpp"
#include "nbglarma/model.hpp"
#include "nbglarma/derivatives.hpp"
#include "nbglarma/gamma_newton.hpp"
#include "nbglarma/nb_glm.hpp"
#include "nbglarma/lasso.hpp"
#include "nbglarma/selection.hpp"
#include "nbglarma/pipeline.hpp"
#include "nbglarma/simulation.hpp"
#include "nbglarma/csv.hpp"
