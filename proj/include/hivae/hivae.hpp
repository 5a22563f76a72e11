#pragma once

// Umbrella header.

#include "hivae/autograd.hpp"
#include "hivae/checkpoint.hpp"
#include "hivae/codec.hpp"
#include "hivae/config.hpp"
#include "hivae/container.hpp"
#include "hivae/dataio.hpp"
#include "hivae/errors.hpp"
#include "hivae/evalkit.hpp"
#include "hivae/flow.hpp"
#include "hivae/generator.hpp"
#include "hivae/model.hpp"
#include "hivae/motion.hpp"
#include "hivae/nn.hpp"
#include "hivae/optim.hpp"
#include "hivae/pipeline.hpp"
#include "hivae/raster.hpp"
#include "hivae/spectral.hpp"
#include "hivae/tensor.hpp"
#include "hivae/training.hpp"
#include "hivae/types.hpp"
