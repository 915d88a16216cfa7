#pragma once

#include <string>

#include "vasa/mask.hpp"

namespace vasa {

/// One segmenter proposal. Ids are 1..n in score order within a pool.
struct CandidateMask {
  int candidate_id = 0;
  std::string source_phrase;
  double score = 0.0;
  RasterMask mask;
};

}  // namespace vasa
