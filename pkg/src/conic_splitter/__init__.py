"""Matrix stuffing and an HSDE operator-splitting solver for beamforming SOCPs."""
