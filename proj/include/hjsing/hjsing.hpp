#pragma once

#include "hjsing/types.hpp"
#include "hjsing/expression.hpp"
#include "hjsing/optimize.hpp"
#include "hjsing/model.hpp"
#include "hjsing/catalog.hpp"
#include "hjsing/action.hpp"
#include "hjsing/grid.hpp"
#include "hjsing/parallel.hpp"
#include "hjsing/laxoleinik.hpp"
#include "hjsing/solver.hpp"
#include "hjsing/singular.hpp"
#include "hjsing/config.hpp"
