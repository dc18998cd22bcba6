#pragma once

#include <string>

#include "ghr/grid.hpp"

namespace ghr {

struct DatasetManifest;

// Per day-of-year arithmetic mean over every state in the manifest,
// accumulated in float64. Every day of year must be covered by at least
// one state, except Feb 29 which is filled by averaging Feb 28 and Mar 1
// when no leap year contributes. Missing days raise an error listing them.
Climatology build_climatology(const DatasetManifest& manifest);

// Stored as a GHRP parameter container with names "doy/001".."doy/366"
// plus grid/variable metadata.
void write_climatology(const Climatology& clim, const std::string& path);
Climatology read_climatology(const std::string& path);

}  // namespace ghr
