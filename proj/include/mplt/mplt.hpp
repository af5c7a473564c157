#pragma once

#include "mplt/accounting.hpp"
#include "mplt/attention.hpp"
#include "mplt/box.hpp"
#include "mplt/config.hpp"
#include "mplt/grad_check.hpp"
#include "mplt/gradcheck_suite.hpp"
#include "mplt/image.hpp"
#include "mplt/io.hpp"
#include "mplt/kalman.hpp"
#include "mplt/metrics.hpp"
#include "mplt/model.hpp"
#include "mplt/ops.hpp"
#include "mplt/optim.hpp"
#include "mplt/prompter.hpp"
#include "mplt/synth.hpp"
#include "mplt/tensor.hpp"
#include "mplt/tracker.hpp"
#include "mplt/train.hpp"
