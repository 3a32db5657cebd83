#pragma once

#include "cppnet/benchmark.hpp"
#include "cppnet/checkpoint.hpp"
#include "cppnet/decoder.hpp"
#include "cppnet/edge_probe.hpp"
#include "cppnet/errors.hpp"
#include "cppnet/gcn_model.hpp"
#include "cppnet/graph_encode.hpp"
#include "cppnet/grid_map.hpp"
#include "cppnet/scenario.hpp"
#include "cppnet/svg.hpp"
#include "cppnet/trainer.hpp"
#include "cppnet/tsp_oracle.hpp"
