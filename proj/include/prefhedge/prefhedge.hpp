#pragma once

#include "prefhedge/errors.hpp"
#include "prefhedge/model.hpp"
#include "prefhedge/quadrature.hpp"
#include "prefhedge/grid.hpp"
#include "prefhedge/conditional.hpp"
#include "prefhedge/policy.hpp"
#include "prefhedge/pide.hpp"
#include "prefhedge/equilibrium.hpp"
#include "prefhedge/mc.hpp"
#include "prefhedge/io.hpp"
#include "prefhedge/table.hpp"
#include "prefhedge/config.hpp"
#include "prefhedge/pipeline.hpp"
