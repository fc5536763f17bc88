#pragma once

#include "mdt/checkpoint.hpp"
#include "mdt/config.hpp"
#include "mdt/data_io.hpp"
#include "mdt/discussion.hpp"
#include "mdt/encoders.hpp"
#include "mdt/errors.hpp"
#include "mdt/gradcheck.hpp"
#include "mdt/image.hpp"
#include "mdt/layers.hpp"
#include "mdt/model.hpp"
#include "mdt/model_config.hpp"
#include "mdt/ops.hpp"
#include "mdt/optim.hpp"
#include "mdt/protocol.hpp"
#include "mdt/rng.hpp"
#include "mdt/tensor.hpp"
#include "mdt/tokenizer.hpp"
#include "mdt/training.hpp"
