#pragma once

#include "ssdlab/covariance.hpp"
#include "ssdlab/denoiser.hpp"
#include "ssdlab/io.hpp"
#include "ssdlab/masking.hpp"
#include "ssdlab/matrix.hpp"
#include "ssdlab/mlp.hpp"
#include "ssdlab/parallel.hpp"
#include "ssdlab/rng.hpp"
#include "ssdlab/sampler.hpp"
#include "ssdlab/score2d.hpp"
#include "ssdlab/shapes.hpp"
#include "ssdlab/trainer.hpp"
