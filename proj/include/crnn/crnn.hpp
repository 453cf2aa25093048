#pragma once

#include "crnn/adam.hpp"
#include "crnn/checkpoint.hpp"
#include "crnn/context.hpp"
#include "crnn/corpus.hpp"
#include "crnn/errors.hpp"
#include "crnn/evaluation.hpp"
#include "crnn/matrix.hpp"
#include "crnn/model.hpp"
#include "crnn/rng.hpp"
#include "crnn/synthetic.hpp"
#include "crnn/tape.hpp"
#include "crnn/training.hpp"
