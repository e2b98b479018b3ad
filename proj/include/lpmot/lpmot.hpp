#pragma once

#include "lpmot/matrix.hpp"
#include "lpmot/simplex.hpp"
#include "lpmot/model.hpp"
#include "lpmot/io.hpp"
#include "lpmot/graphs.hpp"
#include "lpmot/energy.hpp"
#include "lpmot/dc_joint.hpp"
#include "lpmot/dc_nodewise.hpp"
#include "lpmot/incremental.hpp"
#include "lpmot/clear_mot.hpp"
#include "lpmot/pipeline.hpp"
#include "lpmot/config.hpp"
#include "lpmot/synth.hpp"
