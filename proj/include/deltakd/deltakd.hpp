// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "deltakd/bytes.hpp"
#include "deltakd/config.hpp"
#include "deltakd/corpus.hpp"
#include "deltakd/decode.hpp"
#include "deltakd/delta_target.hpp"
#include "deltakd/distill_loss.hpp"
#include "deltakd/engine.hpp"
#include "deltakd/errors.hpp"
#include "deltakd/evaluate.hpp"
#include "deltakd/fp16.hpp"
#include "deltakd/gradcheck.hpp"
#include "deltakd/kernels.hpp"
#include "deltakd/logit_client.hpp"
#include "deltakd/logit_server.hpp"
#include "deltakd/losses.hpp"
#include "deltakd/neural_lm.hpp"
#include "deltakd/numerics.hpp"
#include "deltakd/optimizer.hpp"
#include "deltakd/random.hpp"
#include "deltakd/rouge.hpp"
#include "deltakd/snapshot.hpp"
#include "deltakd/socket.hpp"
#include "deltakd/tabular_lm.hpp"
#include "deltakd/teacher_source.hpp"
#include "deltakd/trainer.hpp"
#include "deltakd/vocab.hpp"
#include "deltakd/wire.hpp"
