#pragma once

// Flat lat/lon geometry for the geographic quadtree.

#include <cstdint>
#include <string>

#include "rpmesh/errors.hpp"

namespace rpmesh {

struct GeoPoint {
    double lat = 0.0;  // degrees in [-90, 90]
    double lon = 0.0;  // degrees in [-180, 180]

    bool operator==(const GeoPoint&) const = default;

    void validate() const {
        if (!(lat >= -90.0 && lat <= 90.0))
            throw Error(Errc::ProtocolError, "latitude out of range: " + std::to_string(lat));
        if (!(lon >= -180.0 && lon <= 180.0))
            throw Error(Errc::ProtocolError, "longitude out of range: " + std::to_string(lon));
    }
};

struct LatLonBox {
    double lat_lo = -90.0, lat_hi = 90.0;
    double lon_lo = -180.0, lon_hi = 180.0;

    bool operator==(const LatLonBox&) const = default;

    bool contains(const GeoPoint& p) const {
        return p.lat >= lat_lo && p.lat <= lat_hi && p.lon >= lon_lo && p.lon <= lon_hi;
    }

    // Quadrant digit: bit 1 = northern half, bit 0 = eastern half, so
    // 0=SW 1=SE 2=NW 3=NE. Points on a shared edge take the smaller digit.
    uint32_t quadrant_of(const GeoPoint& p) const {
        double lat_mid = (lat_lo + lat_hi) / 2.0;
        double lon_mid = (lon_lo + lon_hi) / 2.0;
        uint32_t north = p.lat > lat_mid ? 1 : 0;
        uint32_t east = p.lon > lon_mid ? 1 : 0;
        return (north << 1) | east;
    }

    LatLonBox quadrant_box(uint32_t digit) const {
        double lat_mid = (lat_lo + lat_hi) / 2.0;
        double lon_mid = (lon_lo + lon_hi) / 2.0;
        LatLonBox b = *this;
        if (digit & 2) b.lat_lo = lat_mid; else b.lat_hi = lat_mid;
        if (digit & 1) b.lon_lo = lon_mid; else b.lon_hi = lon_mid;
        return b;
    }
};

}  // namespace rpmesh
