"""tabsql: text-to-SQL over single tables.

Three-stage pipeline (span tagging, entity linking, grammar-constrained
decoding) plus a SQL-subset engine, supervision derivation from alignment
annotations, and evaluation harnesses.
"""

__version__ = "0.1.0"
