#pragma once

// Dense tensors, reverse-mode autodiff, Adam, and the special linear algebra
// the model needs.
#include "bicd/adam.hpp"
#include "bicd/autodiff.hpp"
#include "bicd/errors.hpp"
#include "bicd/linalg.hpp"
#include "bicd/rng.hpp"
#include "bicd/tensor.hpp"
