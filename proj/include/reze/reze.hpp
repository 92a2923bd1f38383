#pragma once

#include "reze/common.hpp"
#include "reze/debias.hpp"
#include "reze/eigenspace.hpp"
#include "reze/fit.hpp"
#include "reze/io.hpp"
#include "reze/metrics.hpp"
#include "reze/objectives.hpp"
#include "reze/relations.hpp"
#include "reze/synthgen.hpp"
#include "reze/trainer.hpp"
