#pragma once

#include "rio4d/manifold.hpp"
#include "rio4d/types.hpp"
#include "rio4d/preprocess.hpp"
#include "rio4d/egovel.hpp"
#include "rio4d/kdtree.hpp"
#include "rio4d/submap.hpp"
#include "rio4d/filter.hpp"
#include "rio4d/loop.hpp"
#include "rio4d/trajectory.hpp"
#include "rio4d/dataset.hpp"
#include "rio4d/sim.hpp"
#include "rio4d/evaluate.hpp"
#include "rio4d/pipeline.hpp"
#include "rio4d/config.hpp"
