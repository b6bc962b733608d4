"""icg-tracker package"""
