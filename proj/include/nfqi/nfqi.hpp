#pragma once

#include "nfqi/cartpole.hpp"
#include "nfqi/clinical.hpp"
#include "nfqi/dataset_io.hpp"
#include "nfqi/error.hpp"
#include "nfqi/evaluation.hpp"
#include "nfqi/experiments.hpp"
#include "nfqi/explain.hpp"
#include "nfqi/mdp.hpp"
#include "nfqi/qfunction.hpp"
#include "nfqi/rng.hpp"
#include "nfqi/training.hpp"
