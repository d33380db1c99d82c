#pragma once

#include "censurv/common.hpp"
#include "censurv/core.hpp"
#include "censurv/dataset_io.hpp"
#include "censurv/crf.hpp"
#include "censurv/tensor.hpp"
#include "censurv/nn.hpp"
#include "censurv/cox.hpp"
#include "censurv/aalen.hpp"
#include "censurv/models.hpp"
#include "censurv/pipelines.hpp"
#include "censurv/metrics.hpp"
#include "censurv/svg.hpp"
