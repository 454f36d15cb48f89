"""Fixed vocabularies shared across modules."""

PROVINCES = ("NL", "PE", "NS", "NB", "QC", "ON", "MB", "SK", "AB", "BC")

SEASONS = ("Spring", "Summer", "Fall", "Winter")

# Winter of year t uses December of t-1 by default (see features.season_of)
SEASON_MONTHS = {
    "Spring": (3, 4, 5),
    "Summer": (6, 7, 8),
    "Fall": (9, 10, 11),
    "Winter": (12, 1, 2),
}

TEMP_TERMS = tuple(f"T_{s}" for s in SEASONS)
PRECIP_TERMS = tuple(f"P_{s}" for s in SEASONS)
CLIMATE_TERMS = TEMP_TERMS + PRECIP_TERMS

SECTORS = (
    "AGR",  # agriculture, forestry, fishing
    "MIN",  # mining, quarrying, oil and gas
    "UTL",  # utilities
    "CON",  # construction
    "MAN",  # manufacturing
    "TRD",  # wholesale and retail trade
    "TRN",  # transportation and warehousing
    "INF",  # information, culture and recreation
    "FIN",  # finance and real estate
    "SCI",  # professional, scientific and technical services
    "EDU",  # educational services
    "HLT",  # health care and social assistance
    "ACC",  # accommodation and food services
    "PUB",  # public administration
    "OTH",  # other services
)
TOTAL = "TOTAL"

INDEX_NAMES = ("world_gdp", "energy_index", "nonenergy_index", "target_rate", "unemployment")
LOG_DIFF_INDICES = ("world_gdp", "energy_index", "nonenergy_index")
LEVEL_INDICES = ("target_rate", "unemployment")

SCENARIOS = ("RCP2.6", "RCP4.5", "RCP8.5")
HORIZONS = ("near", "mid")

BASELINE = (1998, 2017)
TREND_ORIGIN = 1998


def normalize_scenario(name: str) -> str:
    """Accept ``rcp45``, ``RCP4.5``, ``rcp4.5`` and return the canonical label."""
    key = name.strip().upper().replace(".", "").replace("_", "")
    table = {s.replace(".", ""): s for s in SCENARIOS}
    if key not in table:
        raise ValueError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")
    return table[key]
