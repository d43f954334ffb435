#pragma once

#include "cteinv/bpe.hpp"
#include "cteinv/checkpoint.hpp"
#include "cteinv/classify.hpp"
#include "cteinv/corpus.hpp"
#include "cteinv/diff.hpp"
#include "cteinv/encoder.hpp"
#include "cteinv/errors.hpp"
#include "cteinv/evaluation.hpp"
#include "cteinv/grid.hpp"
#include "cteinv/hashing.hpp"
#include "cteinv/metrics.hpp"
#include "cteinv/nn.hpp"
#include "cteinv/optim.hpp"
#include "cteinv/random.hpp"
#include "cteinv/report.hpp"
#include "cteinv/seq2seq.hpp"
#include "cteinv/shard.hpp"
#include "cteinv/synthetic.hpp"
#include "cteinv/text.hpp"
#include "cteinv/threat_model.hpp"
#include "cteinv/train.hpp"
#include "cteinv/wordpiece.hpp"
