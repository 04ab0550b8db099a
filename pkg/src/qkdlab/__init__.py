"""qkdlab: modelling and analysis of receiver-side attacks on BB84 links.

Subpackages:
  * fockspace  -- sparse multimode photon-number states and linear optics
  * receivers  -- measurement-device models and their reversed state spaces
  * attacks    -- zero-error intercept-resend attack synthesis and checking
  * protocol   -- Monte-Carlo BB84 sessions over attacked channels
  * fuzz       -- black-box probing of detector implementations
  * classify   -- structural taxonomy of known implementation attacks
  * cli        -- command-line entry points for all of the above
"""

__version__ = "0.1.0"
