"""Exception hierarchy shared by all descry modules.

Every error carries the module and operation it originated from so the CLI
can emit machine-readable error reports.
"""


class DescryError(Exception):
    """Base class for all descry errors."""

    module = "descry"
    operation = ""

    def __init__(self, message, operation=""):
        super().__init__(message)
        if operation:
            self.operation = operation

    def to_dict(self):
        return {
            "error": type(self).__name__,
            "module": self.module,
            "operation": self.operation,
            "message": str(self),
        }


# -- data ------------------------------------------------------------------

class DataError(DescryError):
    module = "data"


class MissingColumn(DataError):
    pass


class TypeMismatch(DataError):
    pass


class EmptyFile(DataError):
    pass


class UnknownFeature(DataError):
    pass


class NonNumericFeature(DataError):
    pass


class DegenerateSplit(DataError):
    pass


class IndexOutOfRange(DataError):
    pass


# -- phenomenon ------------------------------------------------------------

class PhenomenonError(DescryError):
    module = "phenomenon"


class UnsupportedCombination(PhenomenonError):
    pass


# -- models ----------------------------------------------------------------

class ModelError(DescryError):
    module = "models"


class SingularDesign(ModelError):
    pass


class IncompatibleLoss(ModelError):
    pass


class SchemaMismatch(ModelError):
    pass


# -- samplers --------------------------------------------------------------

class SamplerError(DescryError):
    module = "samplers"


class EmptyNeighborhood(SamplerError):
    pass


# -- descriptors -----------------------------------------------------------

class DescriptorError(DescryError):
    module = "descriptors"


class AllGroupsEmpty(DescriptorError):
    pass


class OffSupportInstance(DescriptorError):
    pass


class TooManyFeaturesForExact(DescriptorError):
    pass


class NoSupportedCandidate(DescriptorError):
    pass


# -- uncertainty -----------------------------------------------------------

class UncertaintyError(DescryError):
    module = "uncertainty"


class NoReferenceAvailable(UncertaintyError):
    pass


class NoOracleAvailable(UncertaintyError):
    pass


class InsufficientReplicates(UncertaintyError):
    pass


# -- cli -------------------------------------------------------------------

class CliError(DescryError):
    module = "cli"


class MissingManifest(CliError):
    pass
