#pragma once

#include "rigline/classifier.hpp"
#include "rigline/dataset.hpp"
#include "rigline/em.hpp"
#include "rigline/error.hpp"
#include "rigline/evaluation.hpp"
#include "rigline/imbalance.hpp"
#include "rigline/learners.hpp"
#include "rigline/mlp.hpp"
#include "rigline/model_io.hpp"
#include "rigline/naive_bayes.hpp"
#include "rigline/pipeline.hpp"
#include "rigline/random.hpp"
#include "rigline/rule_list.hpp"
#include "rigline/stacking.hpp"
#include "rigline/svm.hpp"
#include "rigline/text_io.hpp"
#include "rigline/tree.hpp"
