#pragma once

#include "plaid/autodiff.hpp"
#include "plaid/checkpoint.hpp"
#include "plaid/config.hpp"
#include "plaid/core.hpp"
#include "plaid/corpus.hpp"
#include "plaid/denoiser.hpp"
#include "plaid/diffusion.hpp"
#include "plaid/embedding.hpp"
#include "plaid/model.hpp"
#include "plaid/objective.hpp"
#include "plaid/rng.hpp"
#include "plaid/sampler.hpp"
#include "plaid/scaling.hpp"
#include "plaid/schedule.hpp"
#include "plaid/trainer.hpp"
