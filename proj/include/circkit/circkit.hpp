#pragma once

// Umbrella header for the circkit library: circRNA splice-site detection and
// pairing from genomic sequence, with a minimal reverse-mode tensor engine,
// kernelized linear attention, hard-routed per-species expert heads,
// genome-scale calling, evaluation metrics, and saliency interpretation.

#include "circkit/common.hpp"
#include "circkit/tensor.hpp"
#include "circkit/optim.hpp"
#include "circkit/genome.hpp"
#include "circkit/dataset.hpp"
#include "circkit/model.hpp"
#include "circkit/train.hpp"
#include "circkit/infer.hpp"
#include "circkit/metrics.hpp"
#include "circkit/eval.hpp"
#include "circkit/interpret.hpp"
#include "circkit/oracles.hpp"
