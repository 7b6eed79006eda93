"""The 21 task agents, grouped into seven levels from macro structure to bar-level fusion."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..dsl import COLUMNS

TEMPERATURE_POOL = (0.7, 0.8, 0.9, 1.0, 1.1, 1.2)
CHECKER_TEMPERATURE = 0.8

LEVELS = {
    1: "Market Structure & Cycle",
    2: "Extreme Risk & Fragility",
    3: "Price-Volume Dynamics",
    4: "Price-Volatility Behavior",
    5: "Multi-Scale Complexity",
    6: "Stability & Regime-Gating",
    7: "Geometric & Fusion",
}


@dataclass(frozen=True)
class AgentProfile:
    level: int
    name: str
    guidance: str
    focus: tuple[str, ...] = COLUMNS
    windows: tuple[int, ...] = (3, 5, 10, 20)
    motifs: tuple[str, ...] = ()
    temperature_pool: tuple[float, ...] = field(default=TEMPERATURE_POOL)

    @property
    def layer(self) -> str:
        return LEVELS[self.level]


def _p(level, name, guidance, focus=COLUMNS, windows=(3, 5, 10, 20), motifs=()):
    return AgentProfile(level, name, guidance, tuple(focus), tuple(windows), tuple(motifs))


PROFILES: tuple[AgentProfile, ...] = (
    _p(1, "AgentMarketCycle",
       "Look for slow swings in the price path: where a stock sits inside its recent range, "
       "how far it has drifted from a long average, and whether that drift is turning.",
       ("close", "high", "low"), (20, 40, 60),
       ("(close - ts_mean(close, 40)) / ts_std(close, 40)", "ts_rank(close, 60)")),
    _p(1, "AgentVolatilityRegime",
       "Separate quiet stretches from turbulent ones using realised range and return dispersion, "
       "and score how unusual today's volatility is against its own history.",
       ("close", "high", "low"), (5, 10, 20, 40),
       ("ts_std(close / delay(close, 1) - 1, 10) / ts_std(close / delay(close, 1) - 1, 40)",)),
    _p(2, "AgentTailRisk",
       "Measure exposure to sharp down days: the depth of the worst recent moves, how often "
       "they occur and how slowly prices recover afterwards.",
       ("close", "low", "open"), (10, 20, 40),
       ("ts_min(close / delay(close, 1) - 1, 20)", "(low - ts_max(close, 20)) / ts_max(close, 20)")),
    _p(2, "AgentCrashPredictor",
       "Track warning signs that tend to precede collapses, such as compressed ranges, thinning "
       "volume and prices pressing against recent lows.",
       ("close", "low", "volume", "high"), (5, 10, 20),
       ("ts_mean(volume, 5) / ts_mean(volume, 20)", "(close - ts_min(low, 20)) / ts_std(close, 20)")),
    _p(3, "AgentLiquidity",
       "Quantify trading frictions: how much the price moves per unit of volume and how stable "
       "turnover is from day to day.",
       ("high", "low", "close", "volume", "open"), (5, 10, 20),
       ("(high - close) / (volume + 1e-9)", "abs(close - open) / (volume * close + 1e-9)")),
    _p(3, "AgentOrderImbalance",
       "Infer one-sided buying or selling pressure from where the close lands inside the bar and "
       "how that placement interacts with volume.",
       ("close", "low", "high", "volume"), (3, 5, 10),
       ("ts_mean((close - low) / (high - low + 1e-9), 5)",)),
    _p(3, "AgentPriceVolumeCoherence",
       "Study whether price changes and volume changes move together or diverge, and what a "
       "breakdown of that alignment says about conviction.",
       ("close", "volume"), (5, 10, 20),
       ("ts_corr(close, volume, 10)", "ts_corr(delta(close, 1), delta(volume, 1), 20)")),
    _p(3, "AgentVolumeStructure",
       "Describe the shape of trading activity: bursts, clustering and how today's volume compares "
       "with its usual level.",
       ("volume",), (5, 10, 20, 40),
       ("volume / ts_mean(volume, 20)", "ts_rank(volume, 20)")),
    _p(4, "AgentDailyTrend",
       "Capture persistent directional moves over several days and how strong that persistence is "
       "relative to noise.",
       ("close", "open"), (5, 10, 20),
       ("delta(close, 10) / ts_std(close, 20)", "ts_mean(sign(close - open), 10)")),
    _p(4, "AgentReversal",
       "Find short-term overreactions that are likely to unwind: large recent moves, stretched "
       "closes and exhausted runs.",
       ("close", "open", "high", "low"), (3, 5, 10),
       ("-(close / delay(close, 5) - 1)", "-(close - ts_mean(close, 5)) / ts_std(close, 10)")),
    _p(4, "AgentRangeVol",
       "Work with the daily high-low range: compression followed by expansion, and the level of "
       "range relative to price.",
       ("high", "low", "close"), (5, 10, 20),
       ("ts_mean((high - low) / close, 5) / ts_mean((high - low) / close, 20)",)),
    _p(4, "AgentLagResponse",
       "Examine delayed reactions: how returns, range and volume a few days back relate to what "
       "the stock does now.",
       ("close", "volume", "high", "low"), (1, 2, 3, 5, 10),
       ("delay(close / delay(close, 1) - 1, 2)", "ts_corr(delay(volume, 1), close, 10)")),
    _p(4, "AgentVolAsymmetry",
       "Contrast the size of up moves with the size of down moves and score how lopsided the "
       "recent risk profile is.",
       ("close", "open", "high", "low"), (10, 20),
       ("ts_mean(gate(close > open, close - open, 0), 10) / ts_mean(abs(close - open), 10)",)),
    _p(5, "AgentDrawdown",
       "Describe losses from the recent peak: how deep the fall is, how long it has lasted and how "
       "much of it has been recovered.",
       ("close", "high"), (10, 20, 60),
       ("close / ts_max(close, 60) - 1", "(close - ts_min(close, 20)) / (ts_max(close, 20) - ts_min(close, 20) + 1e-9)")),
    _p(5, "AgentFractal",
       "Compare variability across horizons to detect rough, noisy paths versus smooth trending "
       "ones.",
       ("close",), (5, 10, 20, 40),
       ("ts_std(delta(close, 5), 20) / (ts_std(delta(close, 1), 20) + 1e-9)",)),
    _p(6, "AgentRegimeGating",
       "Switch a simple signal on or off depending on the current state of volatility, trend or "
       "liquidity.",
       COLUMNS, (5, 10, 20),
       ("gate(ts_std(close, 10) > ts_std(close, 40), -delta(close, 5), delta(close, 5))",)),
    _p(6, "AgentStability",
       "Reward smooth, persistent behaviour and penalise erratic paths, for both returns and "
       "derived quantities.",
       ("close", "volume"), (10, 20, 40),
       ("ts_mean(close / delay(close, 1) - 1, 20) / ts_std(close / delay(close, 1) - 1, 20)",)),
    _p(7, "AgentBarShape",
       "Turn candle geometry into continuous numbers: body against range, upper against lower "
       "shadow, and how those proportions evolve.",
       ("open", "high", "low", "close"), (3, 5, 10),
       ("(close - open) / (high - low + 1e-9)", "(high - close) / (close - low + 1e-9)")),
    _p(7, "AgentCreative",
       "Apply bounded non-linear transforms, re-parametrisations and soft gates to familiar "
       "quantities to expose new shapes.",
       COLUMNS, (5, 10, 20),
       ("tanh(delta(close, 5) / ts_std(close, 20))",)),
    _p(7, "AgentComposite",
       "Blend two complementary normalised signals into one score, keeping the combination small "
       "and explainable.",
       COLUMNS, (5, 10, 20),
       ("cs_rank(delta(close, 5)) - cs_rank(volume / ts_mean(volume, 20))",)),
    _p(7, "AgentHerding",
       "Detect crowding: stocks moving with unusual agreement in direction and volume relative to "
       "the cross section.",
       ("close", "volume", "open"), (5, 10),
       ("cs_zscore(ts_mean(sign(close - open) * volume, 5))",)),
)

PROFILE_BY_NAME = {p.name: p for p in PROFILES}
