#pragma once

#include "latmix/dataset.hpp"
#include "latmix/distributions.hpp"
#include "latmix/errors.hpp"
#include "latmix/evaluator.hpp"
#include "latmix/math.hpp"
#include "latmix/model.hpp"
#include "latmix/trainer.hpp"
