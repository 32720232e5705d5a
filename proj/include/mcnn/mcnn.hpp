#pragma once

// Umbrella include for the whole library.

#include "mcnn/common.hpp"
#include "mcnn/config.hpp"
#include "mcnn/data.hpp"
#include "mcnn/image.hpp"
#include "mcnn/io.hpp"
#include "mcnn/layers.hpp"
#include "mcnn/mamba_block.hpp"
#include "mcnn/metrics.hpp"
#include "mcnn/model.hpp"
#include "mcnn/optim.hpp"
#include "mcnn/rng.hpp"
#include "mcnn/tensor.hpp"
#include "mcnn/train.hpp"
