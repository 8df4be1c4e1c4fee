#pragma once

#include "routescope/atlas.hpp"
#include "routescope/datasets.hpp"
#include "routescope/errors.hpp"
#include "routescope/experiments.hpp"
#include "routescope/overlap.hpp"
#include "routescope/sae.hpp"
#include "routescope/stats.hpp"
#include "routescope/synthetic.hpp"
#include "routescope/trace_codec.hpp"
#include "routescope/trace_model.hpp"
