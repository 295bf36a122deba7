#pragma once

// Everything except the HTTP front end (ultrastage/http.hpp).
#include "ultrastage/artnet.hpp"
#include "ultrastage/dome.hpp"
#include "ultrastage/envmap.hpp"
#include "ultrastage/error.hpp"
#include "ultrastage/nnls.hpp"
#include "ultrastage/partition.hpp"
#include "ultrastage/pipeline.hpp"
#include "ultrastage/playback.hpp"
#include "ultrastage/ppm.hpp"
#include "ultrastage/preview.hpp"
#include "ultrastage/probe.hpp"
#include "ultrastage/rgbe.hpp"
#include "ultrastage/sequence.hpp"
#include "ultrastage/service.hpp"
#include "ultrastage/spectral.hpp"
#include "ultrastage/tonemap.hpp"
#include "ultrastage/types.hpp"
