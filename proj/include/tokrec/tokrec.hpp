#pragma once

// umbrella header: the whole library

#include "tokrec/bench.hpp"
#include "tokrec/common.hpp"
#include "tokrec/decoder.hpp"
#include "tokrec/draft_tree.hpp"
#include "tokrec/model.hpp"
#include "tokrec/recycle_matrix.hpp"
#include "tokrec/vocab.hpp"
