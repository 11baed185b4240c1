# standard
import os

# Every kernel run in the tests checks for reads of coefficients that are not computed yet
os.environ.setdefault("TAYLOR_READ_TRAP", "1")
