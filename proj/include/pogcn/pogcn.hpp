#pragma once

#include "pogcn/behavior_order.hpp"
#include "pogcn/commands.hpp"
#include "pogcn/config.hpp"
#include "pogcn/error.hpp"
#include "pogcn/evaluator.hpp"
#include "pogcn/graph.hpp"
#include "pogcn/io.hpp"
#include "pogcn/model.hpp"
#include "pogcn/rng.hpp"
#include "pogcn/synthetic.hpp"
#include "pogcn/trainer.hpp"
