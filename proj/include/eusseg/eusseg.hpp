#pragma once

// Umbrella header for the EUS pancreatic-tumor segmentation pipeline.

#include "eusseg/analysis.hpp"
#include "eusseg/autograd.hpp"
#include "eusseg/checkpoint.hpp"
#include "eusseg/common.hpp"
#include "eusseg/folds.hpp"
#include "eusseg/image.hpp"
#include "eusseg/manifest.hpp"
#include "eusseg/metrics.hpp"
#include "eusseg/model.hpp"
#include "eusseg/network.hpp"
#include "eusseg/optim.hpp"
#include "eusseg/preprocess.hpp"
#include "eusseg/runconfig.hpp"
#include "eusseg/schedule.hpp"
#include "eusseg/tensor.hpp"
#include "eusseg/trainer.hpp"
