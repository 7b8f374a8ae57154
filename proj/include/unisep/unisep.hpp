#pragma once

#include "unisep/autograd.hpp"
#include "unisep/checkpoint.hpp"
#include "unisep/clue.hpp"
#include "unisep/codec.hpp"
#include "unisep/config.hpp"
#include "unisep/eda.hpp"
#include "unisep/errors.hpp"
#include "unisep/eval.hpp"
#include "unisep/inference.hpp"
#include "unisep/losses.hpp"
#include "unisep/metrics.hpp"
#include "unisep/model.hpp"
#include "unisep/nn.hpp"
#include "unisep/ops.hpp"
#include "unisep/optim.hpp"
#include "unisep/rng.hpp"
#include "unisep/separator.hpp"
#include "unisep/synth.hpp"
#include "unisep/trainer.hpp"
#include "unisep/wav.hpp"
