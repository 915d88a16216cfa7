#pragma once

#include "vasa/bench.hpp"
#include "vasa/candidate.hpp"
#include "vasa/clients.hpp"
#include "vasa/engine.hpp"
#include "vasa/error.hpp"
#include "vasa/http_clients.hpp"
#include "vasa/image.hpp"
#include "vasa/mask.hpp"
#include "vasa/metrics.hpp"
#include "vasa/overlay.hpp"
#include "vasa/protocol.hpp"
#include "vasa/rle.hpp"
#include "vasa/trace.hpp"
