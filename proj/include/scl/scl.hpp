#ifndef SCL_SCL_HPP
#define SCL_SCL_HPP

#include "scl/backbones.hpp"
#include "scl/checkpoint.hpp"
#include "scl/config.hpp"
#include "scl/dataset.hpp"
#include "scl/evaluation.hpp"
#include "scl/inference.hpp"
#include "scl/manifest.hpp"
#include "scl/models.hpp"
#include "scl/plot.hpp"
#include "scl/prepared.hpp"
#include "scl/seq2seq.hpp"
#include "scl/synthgen.hpp"
#include "scl/training.hpp"

#endif  // SCL_SCL_HPP
