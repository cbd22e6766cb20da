#pragma once

#include "naptune/core/error.hpp"
#include "naptune/core/rng.hpp"
#include "naptune/tensor/tensor.hpp"
#include "naptune/tensor/ops.hpp"
#include "naptune/tensor/optim.hpp"
#include "naptune/signal/butterworth.hpp"
#include "naptune/signal/prep.hpp"
#include "naptune/signal/dataset.hpp"
#include "naptune/augment/augment.hpp"
#include "naptune/encoder/encoder.hpp"
#include "naptune/encoder/checkpoint.hpp"
#include "naptune/simclr/simclr.hpp"
#include "naptune/tune/sleep.hpp"
#include "naptune/tune/model.hpp"
#include "naptune/tune/train.hpp"
#include "naptune/eval/metrics.hpp"
#include "naptune/eval/harness.hpp"
#include "naptune/synth/synth.hpp"
#include "naptune/eval/report.hpp"
#include "naptune/app/config.hpp"
#include "naptune/app/commands.hpp"
