"""Use case layer tests"""
