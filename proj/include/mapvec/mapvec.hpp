#pragma once

#include "mapvec/align_scores.hpp"
#include "mapvec/evaluation.hpp"
#include "mapvec/geometry.hpp"
#include "mapvec/gradcheck.hpp"
#include "mapvec/instance_mask.hpp"
#include "mapvec/io.hpp"
#include "mapvec/matcher.hpp"
#include "mapvec/relation_attention.hpp"
#include "mapvec/synthetic.hpp"
#include "mapvec/temporal_fusion.hpp"
