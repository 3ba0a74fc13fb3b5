#pragma once

// Everything in one include.

#include "hydra/common.hpp"
#include "hydra/encoder.hpp"
#include "hydra/fft.hpp"
#include "hydra/fusion.hpp"
#include "hydra/io.hpp"
#include "hydra/model.hpp"
#include "hydra/params.hpp"
#include "hydra/radar.hpp"
#include "hydra/recon.hpp"
#include "hydra/scene.hpp"
#include "hydra/training.hpp"
