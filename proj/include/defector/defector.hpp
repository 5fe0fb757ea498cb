#pragma once

#include "defector/attacks.hpp"
#include "defector/config.hpp"
#include "defector/corpus.hpp"
#include "defector/csv.hpp"
#include "defector/dnscache.hpp"
#include "defector/dnsmap.hpp"
#include "defector/error.hpp"
#include "defector/evaluation.hpp"
#include "defector/exposure.hpp"
#include "defector/metrics.hpp"
#include "defector/parallel.hpp"
#include "defector/pathsim.hpp"
#include "defector/popmodel.hpp"
#include "defector/random.hpp"
#include "defector/trafficgen.hpp"
#include "defector/types.hpp"
#include "defector/wfknn.hpp"
