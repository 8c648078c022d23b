#pragma once

#include "memtrack/attention.hpp"
#include "memtrack/bench.hpp"
#include "memtrack/config.hpp"
#include "memtrack/fusion.hpp"
#include "memtrack/losses.hpp"
#include "memtrack/matrix.hpp"
#include "memtrack/memory_bank.hpp"
#include "memtrack/perceiver.hpp"
#include "memtrack/pipeline.hpp"
#include "memtrack/selfcheck.hpp"
#include "memtrack/tensor.hpp"
