#pragma once

#include "samrob/config.hpp"
#include "samrob/container.hpp"
#include "samrob/error.hpp"
#include "samrob/estimator.hpp"
#include "samrob/metrics.hpp"
#include "samrob/noddi.hpp"
#include "samrob/phantom.hpp"
#include "samrob/protocol.hpp"
#include "samrob/scheme.hpp"
#include "samrob/scheme_io.hpp"
#include "samrob/shbasis.hpp"
#include "samrob/training.hpp"
