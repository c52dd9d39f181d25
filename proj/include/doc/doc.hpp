#pragma once

#include "doc/binary_io.hpp"
#include "doc/checkpoint.hpp"
#include "doc/classifier.hpp"
#include "doc/config.hpp"
#include "doc/data.hpp"
#include "doc/desk_task.hpp"
#include "doc/errors.hpp"
#include "doc/finite_difference.hpp"
#include "doc/gradcheck.hpp"
#include "doc/losses.hpp"
#include "doc/metrics.hpp"
#include "doc/model.hpp"
#include "doc/ops.hpp"
#include "doc/protocol.hpp"
#include "doc/random.hpp"
#include "doc/tensor.hpp"
#include "doc/trainer.hpp"
