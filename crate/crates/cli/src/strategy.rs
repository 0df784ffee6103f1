use std::fmt;

/// Rows of an evaluation table, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StrategyLabel {
    GptWeighted,
    EquallyWeighted,
    MinVar,
    MaxRet,
    MaxSharpe,
    MaxSharpeCard,
    MinVarCard,
    MaxRetCard,
    Sp500,
    DowJones,
    Nasdaq,
    PopularFunds,
}

impl StrategyLabel {
    pub const ALL: [StrategyLabel; 12] = [
        StrategyLabel::GptWeighted,
        StrategyLabel::EquallyWeighted,
        StrategyLabel::MinVar,
        StrategyLabel::MaxRet,
        StrategyLabel::MaxSharpe,
        StrategyLabel::MaxSharpeCard,
        StrategyLabel::MinVarCard,
        StrategyLabel::MaxRetCard,
        StrategyLabel::Sp500,
        StrategyLabel::DowJones,
        StrategyLabel::Nasdaq,
        StrategyLabel::PopularFunds,
    ];

    pub const PORTFOLIOS: [StrategyLabel; 5] = [
        StrategyLabel::GptWeighted,
        StrategyLabel::EquallyWeighted,
        StrategyLabel::MinVar,
        StrategyLabel::MaxRet,
        StrategyLabel::MaxSharpe,
    ];

    pub const CARDINALITY: [StrategyLabel; 3] = [
        StrategyLabel::MaxSharpeCard,
        StrategyLabel::MinVarCard,
        StrategyLabel::MaxRetCard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyLabel::GptWeighted => "GPT-weighted",
            StrategyLabel::EquallyWeighted => "Equally-weighted",
            StrategyLabel::MinVar => "Min Var",
            StrategyLabel::MaxRet => "Max Ret",
            StrategyLabel::MaxSharpe => "Max Sharpe",
            StrategyLabel::MaxSharpeCard => "Max Sharpe - card",
            StrategyLabel::MinVarCard => "Min Var - card",
            StrategyLabel::MaxRetCard => "Max Ret - card",
            StrategyLabel::Sp500 => "S&P 500",
            StrategyLabel::DowJones => "Dow Jones",
            StrategyLabel::Nasdaq => "NASDAQ",
            StrategyLabel::PopularFunds => "Popular Investment Funds",
        }
    }

    /// File-name form of the label.
    pub fn slug(self) -> &'static str {
        match self {
            StrategyLabel::GptWeighted => "gpt_weighted",
            StrategyLabel::EquallyWeighted => "equally_weighted",
            StrategyLabel::MinVar => "min_var",
            StrategyLabel::MaxRet => "max_ret",
            StrategyLabel::MaxSharpe => "max_sharpe",
            StrategyLabel::MaxSharpeCard => "max_sharpe_card",
            StrategyLabel::MinVarCard => "min_var_card",
            StrategyLabel::MaxRetCard => "max_ret_card",
            StrategyLabel::Sp500 => "sp500",
            StrategyLabel::DowJones => "dow_jones",
            StrategyLabel::Nasdaq => "nasdaq",
            StrategyLabel::PopularFunds => "popular_funds",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == name)
    }
}

impl fmt::Display for StrategyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_and_slugs_are_unique() {
        let names: std::collections::BTreeSet<_> = StrategyLabel::ALL.iter().map(|l| l.name()).collect();
        let slugs: std::collections::BTreeSet<_> = StrategyLabel::ALL.iter().map(|l| l.slug()).collect();
        assert_eq!(names.len(), 12);
        assert_eq!(slugs.len(), 12);
        for l in StrategyLabel::ALL {
            assert_eq!(StrategyLabel::from_name(l.name()), Some(l));
        }
    }
}
