#pragma once
#include <catefuse/data.hpp>
#include <catefuse/error.hpp>
#include <catefuse/estimators.hpp>
#include <catefuse/evaluation.hpp>
#include <catefuse/json_io.hpp>
#include <catefuse/lasso.hpp>
#include <catefuse/rng.hpp>
#include <catefuse/simulator.hpp>
