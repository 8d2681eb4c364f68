"""Risk-averse quantal response equilibria for matrix and Markov games."""
