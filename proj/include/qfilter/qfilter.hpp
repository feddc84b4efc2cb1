#pragma once

#include "qfilter/classifier.hpp"
#include "qfilter/corpus_filter.hpp"
#include "qfilter/documents.hpp"
#include "qfilter/embedding.hpp"
#include "qfilter/error.hpp"
#include "qfilter/eval_report.hpp"
#include "qfilter/pipeline.hpp"
#include "qfilter/random.hpp"
#include "qfilter/rank_analysis.hpp"
#include "qfilter/sampler.hpp"
#include "qfilter/score_table.hpp"
#include "qfilter/synthetic.hpp"
