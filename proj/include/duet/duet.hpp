#pragma once

#include "duet/tensor.hpp"
#include "duet/autograd.hpp"
#include "duet/rng.hpp"
#include "duet/nets.hpp"
#include "duet/checkpoint.hpp"
#include "duet/oracle.hpp"
#include "duet/losses.hpp"
#include "duet/data.hpp"
#include "duet/zeroth_order.hpp"
#include "duet/metrics.hpp"
#include "duet/target.hpp"
#include "duet/extraction.hpp"
#include "duet/evaluation.hpp"
#include "duet/attacks.hpp"
#include "duet/config.hpp"
#include "duet/harness.hpp"
