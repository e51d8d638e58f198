#pragma once

#include "mwp/checkpoint.hpp"
#include "mwp/corpus.hpp"
#include "mwp/expression.hpp"
#include "mwp/metrics.hpp"
#include "mwp/model.hpp"
#include "mwp/pipeline.hpp"
#include "mwp/tagging.hpp"
#include "mwp/tensor.hpp"
#include "mwp/tokenizer.hpp"
#include "mwp/trainer.hpp"
